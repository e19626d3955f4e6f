import numpy as np


PSNR_CAP = 99.0


def reconstruction_metrics(recovered, truth, data_range=1.0):
    """(MSE, PSNR) of a reconstruction; PSNR is capped at 99.0 for exact matches."""
    recovered = np.asarray(recovered, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recovered.shape != truth.shape:
        raise ValueError(f'shape mismatch: recovered {recovered.shape} vs truth {truth.shape}')
    mse = float(np.mean((recovered - truth) ** 2))
    if mse == 0:
        return 0.0, PSNR_CAP
    return mse, float(min(10.0 * np.log10(data_range ** 2 / mse), PSNR_CAP))
