# core/__init__.py
"""
Core modules for the Agri-GNN yield pipeline
"""
