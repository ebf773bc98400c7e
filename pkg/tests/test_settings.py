from django.conf import settings


class TestSettings:

    def test_settings(self):

        assert not settings.DEBUG, 'Проверьте, что DEBUG в настройках Django выключен'
        assert settings.DATABASES == {}, (
            'Проверьте, что проект не использует базу данных'
        )

    def test_defaults(self):
        assert settings.SIMULATION['CONTRAST_THRESHOLD'] == 0.25
        assert settings.LOSS['DSSIM_WEIGHT'] == 0.1, (
            'Проверьте, что вес D-SSIM по умолчанию равен 0.1'
        )
        assert settings.LOSS['LINLOG_THRESHOLD'] == 20.0
        assert settings.RENDER['TILE_SIZE'] == 16
        assert settings.TRAINING['DENSIFY_GRAD_THRESHOLD'] == 2e-4
        assert settings.SCENE['INIT_OPACITY'] == 0.1
