import os

import pytest
import toolviper.utils.logger as logger

_LOGGER_NAME = "qjump"


@pytest.fixture(scope="session", autouse=True)
def qjump_logger():
    """Log the acceptance runs to the terminal."""
    if os.getenv("VIPER_LOGGER_NAME") != _LOGGER_NAME:
        os.environ["VIPER_LOGGER_NAME"] = _LOGGER_NAME
        logger.setup_logger(
            logger_name=_LOGGER_NAME,
            log_to_term=True,
            log_to_file=False,
            log_file="qjump-logfile",
            log_level="INFO",
        )
