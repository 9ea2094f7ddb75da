# Filename: __init__.py
# Author: Rich Lewis @RichLewis007
# Description: Long-running jobs: the training pipelines and the parameter sweep worker.

__all__ = ["sweep_worker", "trainer"]
