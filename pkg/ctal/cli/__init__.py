from ctal.cli.run_config import RunConfig, load_run_config
