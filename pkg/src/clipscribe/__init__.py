"""clipscribe: turn a video into a descriptive title and a concise abstract.

The pipeline selects informative key-frames from a video stream, captions
them through a pluggable backend, and summarizes the resulting caption
document into a title and an abstract.
"""

__version__ = "0.1.0"
