# integration/__init__.py
"""
Integration modules: the command-line surface
"""
