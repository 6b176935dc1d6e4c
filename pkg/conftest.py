import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'core.settings')
django.setup()

from django.test.utils import setup_test_environment  # noqa: E402

setup_test_environment()
