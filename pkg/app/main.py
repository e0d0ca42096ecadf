import click

from app.api.cli_commands import commands
from app.core.logger import get_logger

logger = get_logger("main")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option("1.0.0", prog_name="spotplan")
@click.pass_context
def cli(ctx):
    """
    Plan and simulate DNN training on preemptible spot instances.
    """
    logger.debug(f"Running '{ctx.invoked_subcommand}'")


for command in commands:
    cli.add_command(command)


if __name__ == "__main__":
    cli()
