# Filename: __init__.py
# Author: Rich Lewis @RichLewis007
# Description: Support services: experiment configuration, logging, formatting and run logs.

__all__ = ["config", "formatting", "logger", "run_log"]
