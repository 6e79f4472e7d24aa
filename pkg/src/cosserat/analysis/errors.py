class AnalysisError(ValueError):
    """Invalid input to a diagnostic."""
