"""
Django settings for core project.

Holds the evidence ledger location, group parameter profile and proof
session defaults on top of the usual Django configuration. Every value can
be overridden from the environment or a ``.env`` file.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/6.0/ref/settings/
"""

import os
from pathlib import Path

import structlog
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Nothing is signed with the key (no sessions, no auth); set it anyway when deploying.
SECRET_KEY = os.getenv("SECRET_KEY", "django-insecure-local-evidence-ledger")

DEBUG = os.getenv("DEBUG", "False").lower() in ("1", "true", "yes")

ALLOWED_HOSTS = [host for host in os.getenv("ALLOWED_HOSTS", "localhost,127.0.0.1").split(",") if host]


# Evidence, ledger and proof configuration

LEDGER_PATH = Path(os.getenv("SVP_LEDGER_PATH", BASE_DIR / "ledger.jsonl"))
PARAMS_PROFILE = os.getenv("SVP_PARAMS", "production")
PROOF_ROUNDS = int(os.getenv("SVP_ROUNDS", "40"))
MESSAGE_TIMEOUT = float(os.getenv("SVP_MESSAGE_TIMEOUT", "30"))
MAX_FRAME_BYTES = int(os.getenv("SVP_MAX_FRAME", str(1 << 20)))
VERIFIER_ADDRESS = os.getenv("SVP_VERIFIER_ADDRESS", "127.0.0.1:7341")
TRANSCRIPT_DIR = Path(os.getenv("SVP_TRANSCRIPT_DIR", BASE_DIR / "transcripts"))
SALT_ENV_VAR = os.getenv("SVP_SALT_ENV", "SVP_CONTRACT_SALT")
TEST_PROFILE_EPOCH = int(os.getenv("SVP_TEST_EPOCH", "1700000000"))

if PROOF_ROUNDS < 1:
    raise ValueError("SVP_ROUNDS must be at least 1.")
if MESSAGE_TIMEOUT <= 0:
    raise ValueError("SVP_MESSAGE_TIMEOUT must be positive.")
if MAX_FRAME_BYTES < 1:
    raise ValueError("SVP_MAX_FRAME must be positive.")


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'evidence_app',
    'ledger_app',
    'proof_app',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.middleware.common.CommonMiddleware',
]

ROOT_URLCONF = 'core.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
            ],
        },
    },
]

WSGI_APPLICATION = 'core.wsgi.application'


# All state lives in the ledger file.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/6.0/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# The ledger is a public bulletin board: every endpoint serves public values only.
REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [
        'rest_framework.permissions.AllowAny',
    ],
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
    ],
    'DEFAULT_PARSER_CLASSES': [
        'rest_framework.parsers.JSONParser',
    ],
    'UNAUTHENTICATED_USER': None,
}


# Logging: structlog event records rendered through the stdlib handlers, on stderr
# so that command output on stdout stays machine-readable.

LOG_LEVEL = os.getenv("SVP_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = os.getenv("SVP_LOG_FORMAT", "console")

if LOG_FORMAT not in ("console", "json"):
    raise ValueError("SVP_LOG_FORMAT must be 'console' or 'json'.")

_SHARED_PROCESSORS = [
    structlog.contextvars.merge_contextvars,
    structlog.stdlib.add_logger_name,
    structlog.stdlib.add_log_level,
    structlog.processors.TimeStamper(fmt="iso"),
]

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'console': {
            '()': structlog.stdlib.ProcessorFormatter,
            'processors': [
                structlog.stdlib.ProcessorFormatter.remove_processors_meta,
                structlog.dev.ConsoleRenderer(colors=False),
            ],
            'foreign_pre_chain': _SHARED_PROCESSORS,
        },
        'json': {
            '()': structlog.stdlib.ProcessorFormatter,
            'processors': [
                structlog.stdlib.ProcessorFormatter.remove_processors_meta,
                structlog.processors.format_exc_info,
                structlog.processors.JSONRenderer(sort_keys=True),
            ],
            'foreign_pre_chain': _SHARED_PROCESSORS,
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': LOG_FORMAT,
        },
    },
    'root': {
        'handlers': ['stderr'],
        'level': LOG_LEVEL,
    },
}

structlog.configure(
    processors=[
        structlog.stdlib.filter_by_level,
        *_SHARED_PROCESSORS,
        structlog.processors.StackInfoRenderer(),
        structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
    ],
    logger_factory=structlog.stdlib.LoggerFactory(),
    wrapper_class=structlog.stdlib.BoundLogger,
    cache_logger_on_first_use=True,
)
