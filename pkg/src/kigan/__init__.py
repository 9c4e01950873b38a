"""Knowledge-informed GAN for multi-agent trajectory prediction at signalized intersections."""

__version__ = "0.1.0"
