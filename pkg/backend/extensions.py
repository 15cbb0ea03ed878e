import logging

from config import Config

# Setup logging
logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL, logging.INFO),
    format='%(asctime)s %(levelname)s %(name)s: %(message)s'
)
logger = logging.getLogger('pipesched')


def set_log_level(level):
    """Change the level of the shared logger (used by the CLI --log-level flag)"""
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logger.setLevel(level)
    logger.debug(f"Log level set to {logging.getLevelName(level)}")
