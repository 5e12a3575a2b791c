import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'nsoc.settings')
django.setup()
