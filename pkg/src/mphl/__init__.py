"""Cooperative network localization with hybrid distance and direction data."""
import logging

logging.getLogger(__name__).addHandler(logging.NullHandler())
