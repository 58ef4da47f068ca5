"""Toolkit for curating staggered, partially-missing gridded smoke forecasts
into a chronological hourly archive, and for analyzing PM2.5 impact on solar
PV output at desk scale."""

__version__ = "0.1.0"
