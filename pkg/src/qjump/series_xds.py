import os
import typing

import pandas as pd
import xarray as xr

from qjump.schema import SchemaIssues, check_dataset, schema_for

QJUMP_DATASET_TYPES = {"ensemble_series", "chi_map", "ergodicity_report", "trajectory"}

CSV_FLOAT_FORMAT = "%.17g"


class InvalidAccessorLocation(ValueError):
    """
    Raised by QJumpXds accessor functions called on a dataset that is not a
    qjump result.
    """

    pass


def write_csv(frame: pd.DataFrame, path: typing.Union[str, os.PathLike]) -> str:
    """
    Write ``frame`` as CSV with a single header row and 17 significant digits.

    Raises
    ------
    RuntimeError
        If the file cannot be written. The message names the path.
    """
    path = os.fspath(path)
    try:
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, na_rep="nan")
    except OSError as exc:
        raise RuntimeError(f"could not write {path}: {exc}") from exc
    return path


@xr.register_dataset_accessor("qjump")
class QJumpXds:
    """Accessor to qjump result datasets (ensemble series, chi maps,
    ergodicity reports and single trajectories). Provides:

        - check(): validate the dataset against the schema of its ``type``
        - to_frame(): flatten to a pandas DataFrame in the CSV column layout
        - to_csv(): write that frame as plot-ready CSV
    """

    _xds: xr.Dataset

    def __init__(self, dataset: xr.Dataset):
        self._xds = dataset

    def _require_qjump(self):
        if self._xds.attrs.get("type") not in QJUMP_DATASET_TYPES:
            raise InvalidAccessorLocation(
                f"dataset of type {self._xds.attrs.get('type')!r} is not a qjump result"
            )

    def check(self) -> SchemaIssues:
        """Schema issues of this dataset (empty if it is valid)."""
        self._require_qjump()
        return check_dataset(self._xds, schema_for(self._xds))

    def to_frame(self, columns: typing.Optional[list[str]] = None) -> pd.DataFrame:
        """
        The dataset as a flat table: one row per grid point (or cell, or
        trajectory), coordinate columns first.

        Time coordinates are called ``t`` and complex variables are split
        into ``re_<name>`` and ``im_<name>`` columns.

        Parameters
        ----------
        columns : list of str, optional
            Columns to keep, in order. All columns by default.

        Returns
        -------
        pandas.DataFrame
        """
        self._require_qjump()
        data = {}
        for name, var in {**self._xds.coords, **self._xds.data_vars}.items():
            col = "t" if name == "time" else name
            if var.dtype.kind == "c":
                data[f"re_{col}"] = var.values.real
                data[f"im_{col}"] = var.values.imag
            else:
                data[col] = var.values
        frame = pd.DataFrame(data)
        if columns is not None:
            frame = frame[columns]
        return frame

    def to_csv(
        self,
        path: typing.Union[str, os.PathLike],
        columns: typing.Optional[list[str]] = None,
    ) -> str:
        """Write :py:meth:`to_frame` to ``path``; returns the path."""
        return write_csv(self.to_frame(columns), path)
