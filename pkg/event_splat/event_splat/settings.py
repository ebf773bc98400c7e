import os

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SECRET_KEY = os.getenv(
    'SPLAT_SECRET_KEY',
    default='x8#q2v!e0l@m4kz7r^t1w$splat9b&c3n6d)yf5g(hj',
)

DEBUG = os.getenv('SPLAT_DEBUG', default='False') == 'True'

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'events.apps.EventsConfig',
    'scene.apps.SceneConfig',
    'render.apps.RenderConfig',
    'training.apps.TrainingConfig',
    'metrics.apps.MetricsConfig',
    'pipeline.apps.PipelineConfig',
]

# Проект не хранит данные в БД: всё живёт в файлах датасета.
DATABASES = {}

# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Rest-framework settings

REST_FRAMEWORK = {
    'UNAUTHENTICATED_USER': None,
    'COERCE_DECIMAL_TO_STRING': False,
}

# Logging

LOG_LEVEL = os.getenv('SPLAT_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        app: {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False}
        for app in (
            'events', 'scene', 'render', 'training', 'metrics', 'pipeline',
        )
    },
}

# Event stream settings

EVENTS = {
    'NOISE_FILTER_TAU_US': 10_000,
    'NOISE_FILTER_RADIUS': 1,
}

SIMULATION = {
    'CONTRAST_THRESHOLD': 0.25,
    'REFRACTORY_US': 0,
    'NOISE_RATE': 0.0,
    'FRAME_COUNT': 250,
    'FRAME_STEP_US': 10_000,
    'ARC_DEGREES': 90.0,
}

# Scene and camera settings

SCENE = {
    'INIT_COUNT': 10_000,
    'BOUNDS': ((-0.4, -0.4, -0.4), (0.4, 0.4, 0.4)),
    'INIT_OPACITY': 0.1,
    'INIT_SCALE_FRACTION': 0.02,
}

CAMERA = {
    'DEFAULT_INTRINSICS': {
        'fx': 300.0, 'fy': 300.0, 'cx': 173.0, 'cy': 130.0,
        'width': 346, 'height': 260,
    },
    'DESK_INTRINSICS': {
        'fx': 70.0, 'fy': 70.0, 'cx': 32.0, 'cy': 32.0,
        'width': 64, 'height': 64,
    },
    'RADIUS': 1.0,
    'ELEVATION_DEGREES': 0.0,
}

RENDER = {
    'TILE_SIZE': 16,
    'NEAR_PLANE': 0.01,
    'LOW_PASS_FLOOR': 0.3,
    'FOOTPRINT_SIGMAS': 3.0,
    'ALPHA_MAX': 0.99,
    'TRANSMITTANCE_MIN': 1e-4,
    'CHUNK_SIZE': 512,
    'BACKGROUND': 0.0,
    'WORKERS': int(os.getenv('SPLAT_WORKERS', default='1')),
}

# Loss settings

LOSS = {
    'GAMMA': 2.2,
    'EPSILON': 1e-5,
    'LINLOG_THRESHOLD': 20.0,
    'DSSIM_WEIGHT': 0.1,
    'SSIM_WINDOW': 11,
    'SSIM_SIGMA': 1.5,
    'SSIM_K1': 0.01,
    'SSIM_K2': 0.03,
}

# Training settings

TRAINING = {
    'ITERATIONS': 50_000,
    'POSITION_LR_INIT': 1.6e-4,
    'POSITION_LR_FINAL': 1.6e-6,
    'FEATURE_LR': 2.5e-3,
    'OPACITY_LR': 5e-2,
    'SCALING_LR': 5e-3,
    'ROTATION_LR': 1e-3,
    'DENSIFICATION_INTERVAL': 100,
    'DENSIFY_FROM_ITER': 500,
    'DENSIFY_UNTIL_ITER': 50_000,
    'DENSIFY_GRAD_THRESHOLD': 2e-4,
    'PERCENT_DENSE': 0.01,
    'MIN_OPACITY': 0.005,
    'OPACITY_RESET_INTERVAL': 3_000,
    'OPACITY_RESET_VALUE': 0.01,
    'SPLIT_COUNT': 2,
    'SPLIT_SCALE_DIVISOR': 1.6,
    'BETA1': 0.9,
    'BETA2': 0.999,
    'ADAM_EPS': 1e-15,
    'FRAME_ANCHOR_WEIGHT': 1.0,
    'CHECKPOINT_INTERVAL': 5_000,
}
