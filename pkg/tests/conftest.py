"""Shared fixtures: the two reference configurations and their trained students."""

from __future__ import annotations

import pytest

from icpo_lab.pretrain import empirical_stats, generate_dataset, solve_ls
from icpo_lab.teacher import TeacherConfig


@pytest.fixture(scope="session")
def matching_cfg():
    """Reference policy-matching configuration (K=10, N=30, B=100)."""
    return TeacherConfig(k=10, c=1.0, gamma=0.2, lam=0.1, tau_w=1.0, sigma_xi=0.5)


@pytest.fixture(scope="session")
def matching_dataset(matching_cfg):
    return generate_dataset(matching_cfg, b=100, n=30, seed=123)


@pytest.fixture(scope="session")
def matching_stats(matching_dataset):
    return empirical_stats(matching_dataset)


@pytest.fixture(scope="session")
def matching_student(matching_stats):
    return solve_ls(matching_stats)


@pytest.fixture(scope="session")
def shock_cfg():
    """Reference shock configuration (K=5, trained at N=5, tested at N=10)."""
    return TeacherConfig(k=5, c=0.5, gamma=0.8, lam=0.1, tau_w=0.5, sigma_xi=0.1)


@pytest.fixture(scope="session")
def shock_student(shock_cfg):
    ds = generate_dataset(shock_cfg, b=200, n=5, seed=42)
    return solve_ls(empirical_stats(ds))


@pytest.fixture(scope="session")
def margin_cfg():
    """Configuration with a strictly positive coverage margin."""
    return TeacherConfig(k=5, c=0.5, gamma=0.5, lam=0.1, tau_w=1.0, sigma_xi=0.1)


@pytest.fixture(scope="session")
def margin_dataset(margin_cfg):
    return generate_dataset(margin_cfg, b=200, n=8, seed=7)
