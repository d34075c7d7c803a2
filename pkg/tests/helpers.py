"""Shared gradient-check helpers: central finite differences vs autograd."""

import torch


def module_gradcheck(module, args, rtol=1e-4, eps=1e-4, wrt_args=()):
    """Full-Jacobian central-difference check over all parameters of a
    module (and optionally some of its tensor arguments), in float64.

    args: positional inputs to module (tensors or anything else); indices
    listed in wrt_args are differentiated as well.
    """
    module = module.double()
    names = [n for n, _ in module.named_parameters()]
    params = [p.detach().clone().requires_grad_(True)
              for _, p in module.named_parameters()]
    diff_args = []
    fixed = {}
    for i, a in enumerate(args):
        if i in wrt_args:
            diff_args.append(a.detach().double().clone().requires_grad_(True))
        else:
            fixed[i] = a

    n_diff = len(diff_args)

    def fn(*flat):
        xs = list(flat[:n_diff])
        ps = dict(zip(names, flat[n_diff:]))
        full_args = []
        it = iter(xs)
        for i in range(len(args)):
            full_args.append(fixed[i] if i in fixed else next(it))
        return torch.func.functional_call(module, ps, tuple(full_args))

    return torch.autograd.gradcheck(fn, tuple(diff_args) + tuple(params),
                                    eps=eps, atol=1e-7, rtol=rtol,
                                    nondet_tol=0.0)


def fd_slice_check(scalar_fn, params, n_coords=24, rtol=1e-3, eps=1e-4,
                   seed=0, floor=1e-4):
    """Compare autograd gradients of scalar_fn() against central finite
    differences on randomly chosen coordinates of the given parameters.

    scalar_fn must recompute the scalar loss from the current parameter
    values each call. Returns the worst relative error observed; the
    denominator is floored so coordinates whose true gradient is zero
    (e.g. attention key biases) compare on an absolute scale.
    """
    gen = torch.Generator().manual_seed(seed)
    loss = scalar_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    per_param = max(1, n_coords // len(params))
    for p, g in zip(params, grads):
        if g is None:  # parameter not on this path
            continue
        flat = p.data.view(-1)
        idx = torch.randperm(flat.numel(), generator=gen)[:per_param]
        for i in idx.tolist():
            orig = flat[i].item()
            flat[i] = orig + eps
            up = scalar_fn().item()
            flat[i] = orig - eps
            down = scalar_fn().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            an = g.view(-1)[i].item()
            denom = max(abs(fd), abs(an), floor)
            worst = max(worst, abs(fd - an) / denom)
    return worst
