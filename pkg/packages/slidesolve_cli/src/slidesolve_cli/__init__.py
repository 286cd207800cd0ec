from .cli import run_pipeline, cli
