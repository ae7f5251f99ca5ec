"""ShowcaseFlow: personalized image showcases with visually grounded explanations."""

__version__ = "0.1.0"
