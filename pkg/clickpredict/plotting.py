"""Accuracy curves from a results table: one chart per prefix dimension with
one line per (feature set, model), accuracy against prefix value."""
import logging
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from clickpredict.features import ALL  # noqa: E402

log = logging.getLogger(__name__)

SVG_HASH_SALT = "clickpredict"

DIMENSION_TITLES = {
    "course_days": "days since course start",
    "student_days": "days since first click",
    "n_clicks": "number of clicks",
    "n_states": "number of sessions",
}


def _value_order(values):
    """Numeric prefix values in ascending order, ``All`` last."""
    distinct = {str(v) for v in values}
    numeric = sorted((v for v in distinct if v != ALL), key=int)
    return numeric + ([ALL] if ALL in distinct else [])


def plot_dimension(results, dimension, split="test"):
    """Chart the mean accuracy (over seeds) of every (feature set, model) along one dimension.

    :param results: Results table (see :func:`clickpredict.evaluation.results_frame`).
    :rtype: :class:`matplotlib.figure.Figure`
    """
    rows = results[(results["dimension"] == dimension) & (results["split"] == split)].copy()
    if rows.empty:
        raise ValueError("no {} results for dimension {}".format(split, dimension))
    rows["value"] = rows["value"].astype(str)
    order = _value_order(rows["value"])
    position = {v: i for i, v in enumerate(order)}
    figure, axes = plt.subplots(figsize=(6, 4))
    means = rows.groupby(["feature_set", "model", "value"], sort=True)["accuracy"].mean()
    for (feature_set, model), series in means.groupby(level=[0, 1], sort=True):
        points = sorted((position[value], acc) for (_, _, value), acc in series.items())
        axes.plot([p[0] for p in points], [p[1] for p in points], marker="o",
                  label="{} / {}".format(model, feature_set))
    axes.set_xticks(range(len(order)))
    axes.set_xticklabels(order)
    axes.set_xlabel(DIMENSION_TITLES.get(dimension, dimension))
    axes.set_ylabel("{} accuracy".format(split))
    axes.set_title("Grade prediction performance across {}".format(DIMENSION_TITLES.get(dimension, dimension)))
    axes.legend(fontsize="small")
    figure.tight_layout()
    return figure


def render_plots(results, out_dir, split="test"):
    """Write one SVG per dimension found in ``results``.

    :return: Paths of the written files.
    """
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    paths = []
    for dimension in sorted(set(results["dimension"])):
        if results[(results["dimension"] == dimension) & (results["split"] == split)].empty:
            log.warning("no %s results for %s: no chart", split, dimension)
            continue
        figure = plot_dimension(results, dimension, split)
        dest = os.path.join(out_dir, "accuracy_{}.svg".format(dimension))
        figure.savefig(dest, format="svg", metadata={"Date": None})
        plt.close(figure)
        log.info("wrote %s", dest)
        paths.append(dest)
    return paths
