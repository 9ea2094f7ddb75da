# Rebuild the golden model file used by the serialization tests.
#
# The model is the one the tests describe in GOLDEN_VALUES, so regenerating the
# file after a deliberate format change keeps both in step. Usage examples:
#
#     uv run --extra dev python create-golden.py
#     uv run --extra dev python create-golden.py --output ./temp/golden-fp.qssm --force
#
# The ``--extra dev`` flag ensures optional development dependencies are available.

from __future__ import annotations

import argparse
from pathlib import Path

from qssm.models.serialization import encode_model
from tests.unit.test_serialization import GOLDEN, _golden_model


def create_golden(destination: Path, *, force: bool) -> Path:
    # Write the golden model file to destination.
    if destination.exists() and not force:
        raise FileExistsError(f"Destination {destination} already exists. Use --force to overwrite.")
    destination.parent.mkdir(parents=True, exist_ok=True)
    destination.write_bytes(encode_model(_golden_model()))
    return destination


def main() -> int:
    # CLI entry point.
    parser = argparse.ArgumentParser(
        description="Write the golden full-precision model file used by the serialization tests.",
    )
    parser.add_argument(
        "--output",
        type=Path,
        default=GOLDEN,
        help="Destination file (default: %(default)s).",
    )
    parser.add_argument(
        "--force",
        action="store_true",
        help="Overwrite the destination file if it already exists.",
    )

    args = parser.parse_args()
    target = create_golden(args.output, force=args.force)
    print(f"Wrote {target.stat().st_size} bytes to {target.resolve()}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
