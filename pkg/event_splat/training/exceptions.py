class TrainingDiverged(RuntimeError):
    """Функция потерь стала NaN или бесконечной."""

    def __init__(self, iteration, loss):
        self.iteration = iteration
        self.loss = loss
        super().__init__(
            f'Обучение разошлось на итерации {iteration}: '
            f'total={loss.total}, event={loss.event_term}, '
            f'ssim={loss.dssim_term}, anchor={loss.anchor_term}.'
        )
