"""Zero-shot object detection with a learned background vector and a
three-stage semantic cascade, sized to run on a CPU."""

__version__ = "0.1.0"
