"""Build bird's-eye-view fish-bone diagrams from the introductions of a topic's papers."""

__version__ = "0.1.0"
