"""Declarative schemas for the xarray datasets produced by qjump, and a
checker that reports every mismatch at once."""

import dataclasses
import typing

import numpy
import xarray
from typeguard import TypeCheckError, check_type

__all__ = [
    "AttrSchema",
    "ArraySchema",
    "DatasetSchema",
    "SchemaIssue",
    "SchemaIssues",
    "check_dataset",
    "schema_for",
    "EnsembleSeriesSchema",
    "ChiMapSchema",
    "ErgodicityReportSchema",
    "TrajectorySchema",
]


@dataclasses.dataclass(frozen=True)
class AttrSchema:
    """Schema of a dataset attribute."""

    name: str
    typ: typing.Any
    """Python type, checked with :py:func:`typeguard.check_type`."""
    optional: bool = False
    docstring: str = ""


@dataclasses.dataclass(frozen=True)
class ArraySchema:
    """Schema of a coordinate or data variable."""

    name: str
    dims: tuple[str, ...]
    kinds: str
    """Accepted numpy dtype kinds, e.g. ``"f"`` or ``"iu"``."""
    optional: bool = False
    docstring: str = ""


@dataclasses.dataclass(frozen=True)
class DatasetSchema:
    """Schema of an xarray dataset, identified by its ``type`` attribute."""

    schema_name: str
    type_name: str
    coordinates: tuple[ArraySchema, ...]
    data_vars: tuple[ArraySchema, ...]
    attributes: tuple[AttrSchema, ...]
    class_docstring: typing.Optional[str] = None


@dataclasses.dataclass
class SchemaIssue:
    """
    Representation of an issue found in a schema check

    ``path`` locates the offending item as (entity type, entity name) pairs,
    e.g. ``[("data_vars", "chi"), ("dims", None)]``.
    """

    path: list[tuple[str, typing.Optional[str]]]
    message: str
    found: typing.Optional[typing.Any] = None
    expected: typing.Optional[list[typing.Any]] = None

    def path_str(self):
        strs = []
        for path, ix in self.path:
            if ix is None or ix == "":
                strs.append(path)
            else:
                strs.append(f"{path}['{ix}']")
        return ".".join(strs)

    def __repr__(self):
        err = f"Schema issue with {self.path_str()}: {self.message}"
        if self.expected is not None:
            options = " or ".join(repr(option) for option in self.expected)
            if self.found is not None:
                err += f" (expected: {options} found: {repr(self.found)})"
            else:
                err += f" (expected: {options})"
        return err


class SchemaIssues(Exception):
    """
    List of issues found in a schema check

    Can be thrown as an exception, so we can report on multiple schema issues
    in one go.
    """

    issues: list[SchemaIssue]

    def __init__(self, issues=None):
        if issues is None:
            self.issues = []
        elif isinstance(issues, SchemaIssues):
            self.issues = issues.issues
        else:
            self.issues = list(issues)

    def add(self, issue: SchemaIssue):
        self.issues.append(issue)

    def __iadd__(self, other: "SchemaIssues"):
        self.issues += other.issues
        return self

    def __len__(self):
        return len(self.issues)

    def __getitem__(self, ix):
        return self.issues[ix]

    def __str__(self):
        if not self.issues:
            return "No schema issues found"
        issues_string = "\n * ".join(repr(issue) for issue in self.issues)
        return f"\n * {issues_string}"

    def __repr__(self):
        return f"SchemaIssues({str(self)})"

    def expect(self):
        """
        Raises this object if issues were found

        :raises: SchemaIssues
        """
        # Hide this function in pytest tracebacks
        __tracebackhide__ = True
        if self.issues:
            raise self


def _check_arrays(
    arrays: typing.Mapping[str, xarray.DataArray],
    schemas: tuple[ArraySchema, ...],
    kind: str,
) -> SchemaIssues:
    issues = SchemaIssues()
    for schema in schemas:
        if schema.name not in arrays:
            if not schema.optional:
                issues.add(SchemaIssue([(kind, schema.name)], "Required array missing"))
            continue
        array = arrays[schema.name]
        if tuple(array.dims) != schema.dims:
            issues.add(
                SchemaIssue(
                    [(kind, schema.name), ("dims", None)],
                    "Wrong dimensions",
                    found=list(array.dims),
                    expected=[list(schema.dims)],
                )
            )
        if array.dtype.kind not in schema.kinds:
            issues.add(
                SchemaIssue(
                    [(kind, schema.name), ("dtype", None)],
                    "Wrong numpy dtype",
                    found=array.dtype,
                    expected=list(schema.kinds),
                )
            )
    return issues


def _check_attributes(
    attrs: typing.Mapping[str, typing.Any], schemas: tuple[AttrSchema, ...]
) -> SchemaIssues:
    issues = SchemaIssues()
    for schema in schemas:
        if schema.name not in attrs:
            if not schema.optional:
                issues.add(
                    SchemaIssue([("attrs", schema.name)], "Required attribute missing")
                )
            continue
        value = attrs[schema.name]
        try:
            check_type(value, schema.typ)
        except TypeCheckError as t:
            issues.add(
                SchemaIssue(
                    [("attrs", schema.name)], str(t), found=type(value), expected=[schema.typ]
                )
            )
    return issues


def check_dataset(dataset: xarray.Dataset, schema: DatasetSchema) -> SchemaIssues:
    """
    Check whether an xarray Dataset conforms to a schema

    :param dataset: Dataset to check
    :param schema: Schema to check against
    :returns: List of :py:class:`SchemaIssue`s found
    """
    if not isinstance(dataset, xarray.Dataset):
        raise TypeError(
            f"check_dataset: Expected xarray.Dataset, but got {type(dataset)}!"
        )

    issues = SchemaIssues()
    found_type = dataset.attrs.get("type")
    if found_type != schema.type_name:
        issues.add(
            SchemaIssue(
                [("attrs", "type")],
                "Wrong dataset type",
                found=found_type,
                expected=[schema.type_name],
            )
        )
    issues += _check_attributes(dataset.attrs, schema.attributes)
    issues += _check_arrays(dataset.coords, schema.coordinates, "coords")
    issues += _check_arrays(dataset.data_vars, schema.data_vars, "data_vars")
    return issues


EnsembleSeriesSchema = DatasetSchema(
    schema_name="EnsembleSeries",
    type_name="ensemble_series",
    coordinates=(ArraySchema("time", ("time",), "f", docstring="In units of 1/kappa."),),
    data_vars=(
        ArraySchema("mean_n", ("time",), "f", docstring="Ensemble mean of |alpha|^2."),
        ArraySchema("emission_rate", ("time",), "f", docstring="I(t) = kappa mean_n."),
        ArraySchema("stderr", ("time",), "f", docstring="Standard error of I(t)."),
        ArraySchema(
            "n_halted",
            ("time",),
            "iu",
            optional=True,
            docstring="Trajectories frozen at the divergence cap.",
        ),
        ArraySchema(
            "counted_rate",
            ("time",),
            "f",
            optional=True,
            docstring="Emissions in (t_prev, t] per trajectory and unit time.",
        ),
        ArraySchema("counted_stderr", ("time",), "f", optional=True),
        ArraySchema("detected_rate", ("time",), "f", optional=True),
    ),
    attributes=(
        AttrSchema("n_trajectories", int),
        AttrSchema("kappa", float),
        AttrSchema("source", typing.Literal["trajectory", "oracle"]),
        AttrSchema("mode", str),
        AttrSchema("alpha0", typing.Union[float, list[float]], optional=True),
        AttrSchema("base_seed", int, optional=True),
        AttrSchema("sampler", str, optional=True),
        AttrSchema("truncation", int, optional=True),
    ),
    class_docstring="Time series of ensemble photon statistics.",
)

ChiMapSchema = DatasetSchema(
    schema_name="ChiMap",
    type_name="chi_map",
    coordinates=(
        ArraySchema("re_alpha0", ("cell",), "f"),
        ArraySchema("im_alpha0", ("cell",), "f"),
    ),
    data_vars=(
        ArraySchema("chi", ("cell",), "f", docstring="Fraction classified Vacuum."),
        ArraySchema("count", ("cell",), "iu"),
        ArraySchema("undecided_fraction", ("cell",), "f"),
        ArraySchema("stderr", ("cell",), "f"),
    ),
    attributes=(
        AttrSchema("horizon", float),
        AttrSchema("vacuum_radius", float),
        AttrSchema("base_seed", int),
        AttrSchema("sampler", str),
    ),
    class_docstring="Probability of reaching the vacuum per initial amplitude.",
)

ErgodicityReportSchema = DatasetSchema(
    schema_name="ErgodicityReport",
    type_name="ergodicity_report",
    coordinates=(ArraySchema("trajectory", ("trajectory",), "iu"),),
    data_vars=(
        ArraySchema("time_average", ("trajectory",), "f"),
        ArraySchema("classification", ("trajectory",), "UO"),
    ),
    attributes=(
        AttrSchema("ensemble_average", float),
        AttrSchema("time_average_mean", float),
        AttrSchema("dispersion_min", float),
        AttrSchema("dispersion_max", float),
        AttrSchema("dispersion_std", float),
        AttrSchema("max_deviation", float),
        AttrSchema("verdict", typing.Literal["ergodic", "non-ergodic"]),
        AttrSchema("horizon", float),
        AttrSchema("rtol", float),
        AttrSchema("atol", float),
    ),
    class_docstring="Per-trajectory time averages against the ensemble average.",
)

TrajectorySchema = DatasetSchema(
    schema_name="Trajectory",
    type_name="trajectory",
    coordinates=(ArraySchema("time", ("time",), "f"),),
    data_vars=(ArraySchema("alpha", ("time",), "c"),),
    attributes=(
        AttrSchema("base_seed", int),
        AttrSchema("stream_index", int),
        AttrSchema("terminal_status", str),
        AttrSchema("n_emissions", int),
        AttrSchema("n_detections", int),
    ),
)

_SCHEMAS = {
    schema.type_name: schema
    for schema in (
        EnsembleSeriesSchema,
        ChiMapSchema,
        ErgodicityReportSchema,
        TrajectorySchema,
    )
}


def schema_for(dataset: xarray.Dataset) -> DatasetSchema:
    """Look up the schema matching the ``type`` attribute of ``dataset``."""
    type_name = dataset.attrs.get("type")
    if type_name not in _SCHEMAS:
        raise ValueError(
            f"Unknown dataset type {type_name!r}, expected one of {sorted(_SCHEMAS)}"
        )
    return _SCHEMAS[type_name]
