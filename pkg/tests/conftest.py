import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def open_layout():
    """5x5 all-floor room, one wall-hugging beacon target, no decor."""
    from navrl.world import GenerationSpec, generate_maze

    return generate_maze(3, GenerationSpec(rows=5, cols=5, style="open", n_targets=1))


@pytest.fixture(scope="session")
def maze_layout():
    from navrl.world import GenerationSpec, generate_maze

    return generate_maze(7, GenerationSpec(rows=9, cols=9, style="maze",
                                           n_targets=4, n_decor=2))


@pytest.fixture()
def empty_room():
    """5x5 open room with objects stripped (pure wall geometry)."""
    import dataclasses

    from navrl.world import GenerationSpec, generate_maze

    lay = generate_maze(1, GenerationSpec(rows=5, cols=5, style="open", n_targets=1))
    return dataclasses.replace(lay, objects=())


@pytest.fixture()
def tiny_model():
    from navrl.model import NavModel, tiny_model_config

    torch.manual_seed(0)
    return NavModel(tiny_model_config(n_actions=6))
