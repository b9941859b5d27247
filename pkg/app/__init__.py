# filepath: app/__init__.py