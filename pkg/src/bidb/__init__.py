"""Body-shape identification heads, templates, score fusion and open-set evaluation."""

__version__ = "0.1.0"
