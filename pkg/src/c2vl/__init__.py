"""Skeleton representation learning from vision-language knowledge prompts."""
__version__ = "0.1.0"
