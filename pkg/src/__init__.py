# RDS Network Toolkit Package
__version__ = "1.0.0"
