# Test suite package for qssm.
