import logging
import os

from rich.logging import RichHandler

LOG_FORMAT = "%(name)s: %(message)s"


def setup_logging(level: str = None) -> None:
    """Install one RichHandler on the root logger; level from OAPROG_LOG_LEVEL unless given."""
    level = (level or os.getenv("OAPROG_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )
    # third-party chatter
    for noisy in ("matplotlib", "PIL", "hyperopt", "lightgbm"):
        logging.getLogger(noisy).setLevel(logging.WARNING)
