"""Two-stage video-forgery detection.

Stage one learns clip representations from real videos only, by predicting
masked per-frame features and by contrasting naturally ordered clips against
frame-shuffled ones. Stage two freezes that backbone and trains a small
classification head on labeled data.
"""

from .config import RunConfig, profile_config

__all__ = ["RunConfig", "profile_config"]
__version__ = "0.1.0"
