class ExportError(Exception):
    """Export failed: bad source data, encoder trouble, or invalid output."""
