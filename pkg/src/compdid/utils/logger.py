import logging
import os
from logging.handlers import RotatingFileHandler


def setup_logging():
    logger = logging.getLogger('compdid')
    logger.setLevel(os.getenv("COMPDID_LOG_LEVEL", "INFO").upper())

    # Avoid duplicate handlers if setup_logging is called multiple times.
    if logger.handlers:
        return logger

    log_format = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(log_format)
    logger.addHandler(stream_handler)

    if os.getenv("COMPDID_LOG_TO_FILE", "true").lower() != "false":
        log_dir = os.getenv("COMPDID_LOG_DIR", "logs")
        os.makedirs(log_dir, exist_ok=True)
        max_bytes = int(os.getenv("LOG_MAX_BYTES", "2097152"))  # 2 MB
        backup_count = int(os.getenv("LOG_BACKUP_COUNT", "5"))
        file_handler = RotatingFileHandler(
            os.path.join(log_dir, 'compdid.log'),
            maxBytes=max_bytes,
            backupCount=backup_count
        )
        file_handler.setFormatter(log_format)
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger


logger = setup_logging()
