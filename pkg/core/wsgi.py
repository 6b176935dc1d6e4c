"""
WSGI entry point serving the public evidence API.

Exposes ``application`` for any WSGI server, e.g.
``gunicorn core.wsgi``; the routes are listed in ``core.urls``.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'core.settings')

application = get_wsgi_application()
