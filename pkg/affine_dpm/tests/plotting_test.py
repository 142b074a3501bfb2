import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import pytest
from test_data import two_groups

from affine_dpm import plot
from affine_dpm.clustering import Partition, psm
from affine_dpm.density import DensityEstimate, Grid, mixture_density

similarity = psm(np.array([[0, 0, 1, 1, 1], [0, 0, 0, 1, 1], [0, 1, 1, 2, 2]]))
trace_table = pd.DataFrame(
    {
        "iteration": np.arange(1, 11),
        "n_clusters": [1, 2, 2, 3, 2, 2, 2, 1, 2, 2],
        "alpha": np.linspace(0.5, 1.5, 10),
        "log_likelihood": -np.linspace(40.0, 30.0, 10),
    }
)
distance_tables = {
    n: pd.DataFrame(
        [[0.0, 0.4, 1.0], [0.4, 0.0, 0.7], [1.0, 0.7, 0.0]],
        index=[0.2, 1.0, 5.0],
        columns=[0.2, 1.0, 5.0],
    )
    for n in (100, 300)
}


def assert_figures_have_axes():
    assert plt.get_fignums()
    for num in plt.get_fignums():
        fig = plt.figure(num)
        assert fig.get_axes()


@pytest.fixture(autouse=True)
def close_figures():
    yield
    plt.close("all")


plot_test_data = [
    (plot.psm_heatmap, (similarity,)),
    (plot.psm_heatmap, (similarity, Partition([0, 0, 1, 1, 1]))),
    (plot.trace_plots, (trace_table,)),
    (plot.trace_plots, (trace_table.drop(columns="log_likelihood"),)),
    (plot.distance_heatmaps, (distance_tables,)),
]


@pytest.mark.plotting
@pytest.mark.parametrize("func, args", plot_test_data)
def test_plots(func, args):
    func(*args)
    assert_figures_have_axes()


@pytest.mark.plotting
def test_density_contour():
    grid = Grid(((-5.0, 5.0, 60), (-5.0, 5.0, 60)))
    estimate = mixture_density([0.5, 0.5], np.array([[-2.0, -2.0], [2.0, 2.0]]), np.array([np.eye(2)] * 2), grid)
    plot.density_contour(estimate, two_groups, Partition(np.repeat([0, 1], 5)))
    assert_figures_have_axes()
    one_d = DensityEstimate.from_values(Grid(((-3.0, 3.0, 7),)), np.full(7, 1 / 7))
    with pytest.raises(ValueError, match="2-d"):
        plot.density_contour(one_d)


@pytest.mark.plotting
def test_save_stored_plots(tmp_path):
    plot.psm_heatmap(similarity)
    plot.distance_heatmaps(distance_tables)
    plot.save_stored_plots(str(tmp_path))
    saved = sorted(p.name for p in tmp_path.iterdir())
    assert saved == ["Normalised L1 distances.png", "Posterior similarity matrix.png"]
