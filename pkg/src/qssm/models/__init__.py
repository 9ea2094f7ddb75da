# Filename: __init__.py
# Author: Rich Lewis @RichLewis007
# Description: Model-layer package: quantization primitives, S5 layers and network, model files,
#              the Mackey-Glass generator, task datasets and metrics.

__all__ = [
    "arithmetic",
    "mackey_glass",
    "metrics",
    "network",
    "qops",
    "quant",
    "quant_config",
    "serialization",
    "ssm",
    "tasks",
]
