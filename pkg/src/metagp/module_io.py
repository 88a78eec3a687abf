"""Canonical module files: bit-exact save/load and dictionary validation.

Format (documented in README.md, section "Module file format"): plain text,
one `key = value` pair per line, matrices as indented row blocks, keys in
the fixed order

    schema_version, kind, kernel_family, log_variance, log_lengthscales,
    Z, mu, L, likelihood, [log_noise_variance], n_latent,
    [meta_* sidecar], elbo_star, n_train, input_dim, created_by, checksum

Floats are rendered as shortest round-trip decimals, so save -> load is the
identity at bit level. The checksum is 64-bit FNV-1a over every byte that
precedes its own line; it detects corruption, not tampering.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ChecksumMismatch,
    IncompatibleModules,
    InvariantViolation,
    IoFailure,
    ParseError,
    UnknownSchemaVersion,
)
from .gaussians import GaussianDist
from .kernels import KERNEL_FAMILY, KernelParams
from .likelihoods import LikelihoodSpec
from .svgp import SCHEMA_VERSION, GPModule

__all__ = ["save_module", "load_module", "validate_dictionary", "ValidationReport",
           "fnv1a64", "canonical_module_text", "save_meta", "load_meta",
           "save_mo_meta", "load_mo_meta", "load_any"]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data):
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def _fmt(x):
    """Shortest decimal that round-trips the 64-bit float exactly."""
    return repr(float(x))


def _fmt_vec(v):
    return " ".join(_fmt(x) for x in np.asarray(v, dtype=np.float64))


def _matrix_block(name, rows):
    lines = [f"{name} ="]
    lines += ["  " + _fmt_vec(r) for r in rows]
    return lines


def _tril_rows(L):
    """Row-major lower triangle of a square matrix."""
    return [L[i, : i + 1] for i in range(L.shape[0])]


def canonical_module_text(module, sidecar=None):
    """Canonical serialization of a GPModule, checksum line included."""
    lines = [
        f"schema_version = {SCHEMA_VERSION}",
        "kind = gp_module",
        f"kernel_family = {KERNEL_FAMILY}",
        f"log_variance = {_fmt(module.kernel.log_variance)}",
        f"log_lengthscales = {_fmt_vec(module.kernel.log_lengthscales)}",
    ]
    lines += _matrix_block("Z", module.Z)
    lines.append(f"mu = {_fmt_vec(module.q_u.mean)}")
    lines += _matrix_block("L", _tril_rows(module.q_u.cov_chol))
    lines.append(f"likelihood = {module.likelihood.family}")
    if module.likelihood.family == "gaussian":
        lines.append(f"log_noise_variance = {_fmt(module.likelihood.log_noise_variance)}")
    lines.append(f"n_latent = {module.n_latent}")
    for key in sorted(sidecar or {}):
        lines.append(f"meta_{key} = {sidecar[key]}")
    lines += [
        f"elbo_star = {_fmt(module.elbo_star)}",
        f"n_train = {module.n_train}",
        f"input_dim = {module.input_dim}",
        f"created_by = {module.created_by}",
    ]
    body = "\n".join(lines) + "\n"
    digest = fnv1a64(body.encode("utf-8"))
    return body + f"checksum = {digest:016x}\n"


def save_module(module, path, sidecar=None):
    """Write the canonical form; identical modules give byte-identical files."""
    text = canonical_module_text(module, sidecar)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write module file {path}: {exc}") from exc


def _parse_lines(text, path):
    """Split canonical text into (scalar fields, matrix blocks)."""
    fields = {}
    blocks = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.startswith("  ") and current is not None:
            try:
                blocks[current].append([float(tok) for tok in raw.split()])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad matrix row: {exc}") from exc
            continue
        current = None
        if not raw.strip():
            continue
        if "=" not in raw:
            raise ParseError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = raw.partition("=")
        key = key.strip()
        value = value.strip()
        if value == "":
            current = key
            blocks[key] = []
        else:
            if key in fields:
                raise ParseError(f"{path}:{lineno}: duplicate key {key!r}")
            fields[key] = value
    return fields, blocks


def _verify_checksum(text, path):
    marker = "checksum = "
    pos = text.rfind(marker)
    if pos < 0:
        raise ChecksumMismatch(f"{path}: no checksum line")
    body, tail = text[:pos], text[pos:]
    stored = tail[len(marker):].strip()
    digest = f"{fnv1a64(body.encode('utf-8')):016x}"
    if stored != digest:
        raise ChecksumMismatch(f"{path}: checksum {stored} != recomputed {digest}")
    return body


def read_canonical(path):
    """Load, checksum-verify and parse a canonical file into raw fields."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read module file {path}: {exc}") from exc
    body = _verify_checksum(text, path)
    fields, blocks = _parse_lines(body, path)
    version = fields.get("schema_version")
    if version != SCHEMA_VERSION:
        raise UnknownSchemaVersion(f"{path}: schema_version {version!r}")
    return fields, blocks


def _module_from_fields(fields, blocks, path):
    for key in ("kernel_family", "likelihood", "mu", "log_lengthscales", "elbo_star"):
        if key not in fields:
            raise ParseError(f"{path}: missing field {key!r}")
    if fields.get("kind", "gp_module") != "gp_module":
        raise InvariantViolation(f"{path}: kind {fields['kind']!r} is not a module")
    if fields["kernel_family"] != KERNEL_FAMILY:
        raise InvariantViolation(f"{path}: unknown kernel family {fields['kernel_family']!r}")
    kernel = KernelParams(float(fields["log_variance"]),
                          [float(t) for t in fields["log_lengthscales"].split()])
    if fields["likelihood"] == "gaussian":
        lik = LikelihoodSpec("gaussian", float(fields["log_noise_variance"]))
    else:
        lik = LikelihoodSpec(fields["likelihood"])
    Z = np.array(blocks.get("Z", []), dtype=np.float64)
    mu = np.array([float(t) for t in fields["mu"].split()])
    tri = blocks.get("L", [])
    dim = len(tri)
    if dim != mu.shape[0] or any(len(row) != i + 1 for i, row in enumerate(tri)):
        raise InvariantViolation(f"{path}: L triangle inconsistent with mu length {mu.shape[0]}")
    L = np.zeros((dim, dim))
    for i, row in enumerate(tri):
        L[i, : i + 1] = row
    try:
        q_u = GaussianDist(mu, L)
        module = GPModule(
            Z=Z, q_u=q_u, kernel=kernel, likelihood=lik,
            elbo_star=float(fields["elbo_star"]), n_train=int(fields["n_train"]),
            created_by=fields.get("created_by", "unknown"),
        )
    except InvariantViolation:
        raise
    except (ValueError, KeyError) as exc:
        raise InvariantViolation(f"{path}: {exc}") from exc
    if int(fields["input_dim"]) != module.input_dim:
        raise InvariantViolation(f"{path}: declared input_dim differs from Z")
    if int(fields["n_latent"]) != module.n_latent:
        raise InvariantViolation(f"{path}: declared n_latent differs from likelihood family")
    return module


def load_module(path):
    """Read a module file back; checksum and invariants are enforced."""
    fields, blocks = read_canonical(path)
    return _module_from_fields(fields, blocks, path)


def load_sidecar(path):
    """The meta_* sidecar keys of a canonical file (empty for plain modules)."""
    fields, _ = read_canonical(path)
    return {k[len("meta_"):]: v for k, v in fields.items() if k.startswith("meta_")}


# ---------------------------------------------------------------------------
# Meta-GP files: the single-output form reuses the module format (the meta is
# exported as a module) plus a meta_* sidecar, so pyramidal composition comes
# for free; the multi-output form has its own `kind` with Q latent sections.

def save_meta(meta, final_bound, path, n_train=0):
    """Write a single-output meta as an exported module plus sidecar."""
    from .meta import export_meta_as_module

    module = export_meta_as_module(meta, final_bound, n_train)
    sidecar = {
        "kind": "single_output",
        "m": meta.n_inducing,
        "sum_elbo": _fmt(meta.elbo_sum_constant),
    }
    save_module(module, path, sidecar)


def load_meta(path):
    """Rebuild a MetaGP from a meta file (module part + sidecar)."""
    from .meta import MetaGP

    fields, blocks = read_canonical(path)
    if fields.get("meta_kind") != "single_output":
        raise InvariantViolation(f"{path}: not a single-output meta file")
    module = _module_from_fields(fields, blocks, path)
    return MetaGP(
        Z_star=module.Z,
        q_u_star=module.q_u,
        kernel=module.kernel,
        elbo_sum_constant=float(fields["meta_sum_elbo"]),
        likelihood=module.likelihood,
    )


def canonical_mo_meta_text(meta):
    from .kernels import KERNEL_FAMILY as fam

    lmc = meta.lmc
    lines = [
        f"schema_version = {SCHEMA_VERSION}",
        "kind = mo_meta",
        f"kernel_family = {fam}",
        f"q = {lmc.Q}",
        f"n_outputs = {meta.n_outputs}",
    ]
    for i, lik in enumerate(meta.output_likelihoods):
        if lik.family == "gaussian":
            lines.append(f"output_{i} = gaussian {_fmt(lik.log_noise_variance)}")
        else:
            lines.append(f"output_{i} = {lik.family}")
    for q in range(lmc.Q):
        k = lmc.latent_kernels[q]
        lines.append(f"latent_{q}_log_variance = {_fmt(k.log_variance)}")
        lines.append(f"latent_{q}_log_lengthscales = {_fmt_vec(k.log_lengthscales)}")
        lines.append(f"latent_{q}_mu = {_fmt_vec(meta.q_v[q].mean)}")
        lines += _matrix_block(f"latent_{q}_L", _tril_rows(meta.q_v[q].cov_chol))
    lines += _matrix_block("Z", meta.Z_star)
    lines += _matrix_block("A", lmc.A)
    lines += [
        f"sum_elbo = {_fmt(meta.elbo_sum_constant)}",
        "created_by = metagp",
    ]
    body = "\n".join(lines) + "\n"
    digest = fnv1a64(body.encode("utf-8"))
    return body + f"checksum = {digest:016x}\n"


def save_mo_meta(meta, path):
    """Write a multi-output meta in its own canonical form."""
    text = canonical_mo_meta_text(meta)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write meta file {path}: {exc}") from exc


def load_mo_meta(path):
    from .mogp import LMCConfig, MOMetaGP

    fields, blocks = read_canonical(path)
    if fields.get("kind") != "mo_meta":
        raise InvariantViolation(f"{path}: not a multi-output meta file")
    q_count = int(fields["q"])
    n_out = int(fields["n_outputs"])
    liks = []
    for i in range(n_out):
        toks = fields[f"output_{i}"].split()
        liks.append(LikelihoodSpec(toks[0], float(toks[1]) if len(toks) > 1 else None))
    kernels, q_v = [], []
    for q in range(q_count):
        kernels.append(KernelParams(
            float(fields[f"latent_{q}_log_variance"]),
            [float(t) for t in fields[f"latent_{q}_log_lengthscales"].split()],
        ))
        mu = np.array([float(t) for t in fields[f"latent_{q}_mu"].split()])
        tri = blocks[f"latent_{q}_L"]
        dim = len(tri)
        L = np.zeros((dim, dim))
        for i, row in enumerate(tri):
            L[i, : i + 1] = row
        q_v.append(GaussianDist(mu, L))
    Z = np.array(blocks["Z"], dtype=np.float64)
    A = np.array(blocks["A"], dtype=np.float64)
    return MOMetaGP(
        Z_star=Z,
        q_v=q_v,
        lmc=LMCConfig(Q=q_count, A=A, latent_kernels=kernels),
        output_likelihoods=liks,
        elbo_sum_constant=float(fields["sum_elbo"]),
    )


def load_any(path):
    """Load whichever model kind the file holds; returns (kind, object)."""
    fields, _ = read_canonical(path)
    kind = fields.get("kind", "gp_module")
    if kind == "mo_meta":
        return "mo_meta", load_mo_meta(path)
    if fields.get("meta_kind") == "single_output":
        return "meta", load_meta(path)
    return "module", load_module(path)


@dataclass
class ValidationReport:
    n_modules: int
    input_dim: int
    kernel_family: str
    per_module: list  # dicts with n_inducing, n_train, elbo_star, likelihood
    sum_elbo_star: float

    def __str__(self):
        rows = [
            f"  [{i}] M={e['n_inducing']} N={e['n_train']} "
            f"L*={e['elbo_star']:.6f} lik={e['likelihood']}"
            for i, e in enumerate(self.per_module)
        ]
        head = (f"dictionary: K={self.n_modules} input_dim={self.input_dim} "
                f"kernel={self.kernel_family} sum L*={self.sum_elbo_star:.6f}")
        return "\n".join([head] + rows)


def validate_dictionary(modules, for_single_output=False):
    """Check a module dictionary is jointly usable; report its summary.

    All modules must share input_dim (and kernel family, constant in this
    build). With for_single_output=True they must additionally share one
    single-latent likelihood family (gaussian or bernoulli).
    """
    modules = list(modules)
    if not modules:
        raise IncompatibleModules("empty module dictionary")
    offending = []
    dim0 = modules[0].input_dim
    for i, mod in enumerate(modules[1:], start=1):
        if mod.input_dim != dim0:
            offending.append((0, i, f"input_dim {dim0} vs {mod.input_dim}"))
    if for_single_output:
        fam0 = modules[0].likelihood.family
        for i, mod in enumerate(modules[1:], start=1):
            if mod.likelihood.family != fam0:
                offending.append((0, i, f"likelihood {fam0} vs {mod.likelihood.family}"))
        for i, mod in enumerate(modules):
            if mod.likelihood.family == "het_gaussian":
                offending.append((i, i, "het_gaussian requires the multi-output path"))
    if offending:
        raise IncompatibleModules(f"incompatible module pairs: {offending}")
    per = [
        {
            "n_inducing": m.n_inducing,
            "n_train": m.n_train,
            "elbo_star": m.elbo_star,
            "likelihood": m.likelihood.family,
        }
        for m in modules
    ]
    return ValidationReport(
        n_modules=len(modules),
        input_dim=dim0,
        kernel_family=KERNEL_FAMILY,
        per_module=per,
        sum_elbo_star=float(sum(m.elbo_star for m in modules)),
    )
