"""
Candidate libraries and design matrices
=======================================

A library is an ordered list of monomials ``p^i * dp^j * v^k``. The
regression target is the finite-difference second derivative of pressure,
so fitted coefficients solve ``d2p = Theta @ xi``.

"""

import logging
import pathlib

import numpy
import orjson
import pydantic

from hemosindy import errors, models, signal

LOGGER = logging.getLogger(__name__)

LIBRARIES = ('eq2', 'linear', 'lienard')


def _library(*triples: tuple[int, int, int]) -> models.LibrarySpec:
    return models.LibrarySpec(terms=[list(triple) for triple in triples])


def default_library() -> models.LibrarySpec:
    """Return the nine-term general library.

    Terms, in column order: dp, dp^2, dp^3, p, p*dp, p*dp^2, p^2, p^2*dp,
    v.

    """
    return _library(
        (0, 1, 0),
        (0, 2, 0),
        (0, 3, 0),
        (1, 0, 0),
        (1, 1, 0),
        (1, 2, 0),
        (2, 0, 0),
        (2, 1, 0),
        (0, 0, 1),
    )


def linear_library() -> models.LibrarySpec:
    """Return the forced damped oscillator library ``[dp, p, v]``"""
    return _library((0, 1, 0), (1, 0, 0), (0, 0, 1))


def lienard_library() -> models.LibrarySpec:
    """Return the polynomial damping and stiffness library.

    Models ``d2p + A(p)*dp + B(p)*p = epsilon*v`` with ``A`` and ``B``
    quadratic in ``p``: terms dp, p*dp, p^2*dp, p, p^2, p^3, v.

    """
    return _library(
        (0, 1, 0), (1, 1, 0), (2, 1, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0),
        (0, 0, 1),
    )  # fmt: skip


def load_library(choice: str) -> models.LibrarySpec:
    """Resolve a library by name (eq2, linear, lienard) or JSON file path

    Raises:
        errors.DataFileError: when the file cannot be read
        errors.InputError: when the file does not describe a valid library

    """
    if choice == 'eq2':
        return default_library()
    elif choice == 'linear':
        return linear_library()
    elif choice == 'lienard':
        return lienard_library()
    path = pathlib.Path(choice)
    try:
        return models.LibrarySpec.from_json(path.read_bytes())
    except OSError as err:
        raise errors.DataFileError(f'Cannot read library {path}') from err
    except (orjson.JSONDecodeError, pydantic.ValidationError) as err:
        raise errors.InputError(f'Invalid library {path}: {err}') from err


def build_design_matrix(
    pair: models.SignalPair,
    derivs: models.DerivativeSet,
    spec: models.LibrarySpec,
    edge_rows: int = 0,
) -> models.DesignMatrix:
    """Evaluate every library term at every sample.

    Args:
        pair: The pressure/velocity record
        derivs: Derivatives of ``pair.pressure``
        spec: The candidate library
        edge_rows: Rows to drop at both ends of the record

    Raises:
        errors.InputError: when the derivatives do not match the record

    """
    if len(derivs.d1) != len(pair) or len(derivs.d2) != len(pair):
        raise errors.InputError(
            f'Derivatives have {len(derivs.d1)} samples, record has '
            f'{len(pair)}'
        )
    if derivs.d1.dt != pair.dt:
        raise errors.InputError('Derivatives and record use different dt')
    if edge_rows < 0 or 2 * edge_rows >= len(pair):
        raise errors.ParameterError(
            f'Cannot drop {edge_rows} edge rows from {len(pair)} samples'
        )
    p = pair.pressure.values
    dp = derivs.d1.values
    v = pair.velocity.values
    columns = [term.evaluate(p, dp, v) for term in spec.terms]
    stop = len(pair) - edge_rows
    LOGGER.debug(
        'Built %i x %i design matrix (%s)',
        stop - edge_rows,
        len(spec),
        ', '.join(spec.names),
    )
    try:
        return models.DesignMatrix(
            columns=numpy.column_stack(columns)[edge_rows:stop],
            terms=spec,
            target=derivs.d2.values[edge_rows:stop],
        )
    except pydantic.ValidationError as err:
        raise errors.InputError(str(err)) from err


def design_matrix_for(
    pair: models.SignalPair, spec: models.LibrarySpec, edge_rows: int = 0
) -> models.DesignMatrix:
    """Differentiate the pressure record and build its design matrix"""
    return build_design_matrix(
        pair, signal.differentiate(pair.pressure), spec, edge_rows
    )
