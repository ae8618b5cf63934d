"""
Tests for environment-driven settings.
"""

import pytest
from pydantic import ValidationError

from ..config.settings import IntegrationSettings, LoggingSettings, ShadowSettings, TwoGoodSettings


class TestSettings:
    """Test settings sections and their validators."""

    def test_defaults(self):
        """Test the documented defaults."""
        integration = IntegrationSettings()
        assert integration.ray_nodes == 64
        assert integration.smoothing == 1e-3
        assert ShadowSettings().convention == "barycentric"
        assert TwoGoodSettings().z_grid_size == 2001

    def test_env_prefix(self, monkeypatch):
        """Test that each section reads its own prefix."""
        monkeypatch.setenv("CEEI_TWOGOOD_Z_GRID_SIZE", "401")
        monkeypatch.setenv("CEEI_SHADOW_CONVENTION", "switching")
        assert TwoGoodSettings().z_grid_size == 401
        assert ShadowSettings().convention == "switching"

    def test_log_level_normalized(self, monkeypatch):
        """Test that log levels are upper-cased."""
        monkeypatch.setenv("CEEI_LOG_LEVEL", "debug")
        assert LoggingSettings().level == "DEBUG"

    def test_invalid_log_level(self, monkeypatch):
        """Test that unknown log levels are rejected."""
        monkeypatch.setenv("CEEI_LOG_LEVEL", "LOUD")
        with pytest.raises(ValidationError, match="Invalid log level"):
            LoggingSettings()

    def test_odd_ray_nodes(self, monkeypatch):
        """Test that the ray rule order must be even."""
        monkeypatch.setenv("CEEI_INTEGRATION_RAY_NODES", "63")
        with pytest.raises(ValidationError, match="ray_nodes must be even"):
            IntegrationSettings()
