import time

import numpy as np
import pytest
import torch

CRITERIA: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    CRITERIA[n] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


@pytest.fixture(scope="session")
def trained_prior():
    """TinyUNet trained 2000 steps on 512 synthetic 32x32 textures (shared by slow tests)."""
    from raremix import diffusion as dm
    from raremix.synthetic import blob_textures
    from raremix.unet import TinyUNet

    torch.manual_seed(0)
    tex = blob_textures(512, seed=0)
    x = torch.from_numpy(tex.astype(np.float32) / 127.5 - 1).permute(0, 3, 1, 2).contiguous()
    sch = dm.build_schedule()
    t0 = time.process_time()
    w0 = time.time()
    model, losses = dm.train(TinyUNet(), x, sch, steps=2000, seed=0, log_every=0)
    return {"model": model, "schedule": sch, "losses": losses,
            "cpu_seconds": time.process_time() - t0, "wall_seconds": time.time() - w0}
