import logging

logger = logging.getLogger("speaker_backend")

logging.basicConfig()
