from loguru import logger
import sys
from datetime import datetime
import os

from app.core.config import settings

# Configure Loguru
logger.remove()  # Remove default logger
logger.add(
    sys.stderr,
    colorize=True,
    level=settings.LOG_LEVEL,
    format="<green>{time:HH:mm:ss}</green> | <level>{level}</level> | {extra[module]} | <cyan>{message}</cyan>",
)

if settings.LOG_TO_FILE:
    # Create logs folder if not exists
    os.makedirs(settings.LOG_DIR, exist_ok=True)
    log_file_path = os.path.join(settings.LOG_DIR, f"spotplan_{datetime.now().strftime('%Y-%m-%d')}.log")
    logger.add(
        log_file_path,
        rotation="10 MB",
        retention="7 days",
        level="DEBUG",
        encoding="utf-8",
        enqueue=True,
    )

logger.configure(extra={"module": "general"})


def get_logger(name: str = None):
    """Return a child logger for a specific module"""
    return logger.bind(module=name or "general")
