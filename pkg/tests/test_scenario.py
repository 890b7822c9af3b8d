import math

import numpy as np
import pytest

from src.errors import ConfigurationError
from src.scenario import (
    AccessPoint,
    LinkState,
    SiteConfig,
    TruePath,
    classify_link,
    default_site,
    default_test_path,
    sample_true_trajectory,
)


def _distance_to_polyline(point, waypoints):
    p = np.asarray(point)
    best = math.inf
    for a, b in zip(waypoints, waypoints[1:]):
        a, b = np.asarray(a), np.asarray(b)
        t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * (b - a)))))
    return best


class TestSampleTrueTrajectory:
    def test_uniform_spacing_on_segment(self):
        points = sample_true_trajectory(TruePath(waypoints=((0.0, 0.0), (10.0, 0.0)), speed=1.0))
        assert points.shape == (11, 2)
        np.testing.assert_allclose(points[:, 0], np.arange(11.0), atol=1e-12)
        np.testing.assert_allclose(points[:, 1], 0.0, atol=1e-12)

    def test_one_step_covers_hypotenuse(self):
        points = sample_true_trajectory(TruePath(waypoints=((0.0, 0.0), (3.0, 4.0)), speed=5.0))
        np.testing.assert_allclose(points, [[0.0, 0.0], [3.0, 4.0]], atol=1e-12)

    def test_corner_hit_exactly(self):
        points = sample_true_trajectory(TruePath(waypoints=((0.0, 0.0), (5.0, 0.0), (5.0, 5.0)), speed=1.0))
        assert len(points) == 11
        np.testing.assert_allclose(points[5], [5.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(points[-1], [5.0, 5.0], atol=1e-12)

    def test_last_sample_is_final_waypoint(self):
        points = sample_true_trajectory(TruePath(waypoints=((0.0, 0.0), (0.0, 2.5)), speed=1.0))
        assert len(points) == 4
        np.testing.assert_allclose(points[-1], [0.0, 2.5])

    def test_empty_waypoints_rejected(self):
        with pytest.raises(ConfigurationError):
            TruePath(waypoints=())

    def test_repeated_waypoint_rejected(self):
        with pytest.raises(ConfigurationError):
            TruePath(waypoints=((1.0, 1.0), (1.0, 1.0)))

    def test_points_lie_on_polyline(self):
        path = default_test_path()
        for point in sample_true_trajectory(path):
            assert _distance_to_polyline(point, path.waypoints) < 1e-9

    def test_traversed_arc_length(self):
        path = TruePath(waypoints=((0.0, 0.0), (5.0, 0.0), (5.0, 5.5)), speed=1.0)
        points = sample_true_trajectory(path)
        traversed = float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))
        expected = min(path.speed * path.ranging_interval * (len(points) - 1), path.length)
        assert traversed == pytest.approx(expected, abs=1e-9)

    def test_default_test_path_spacing(self):
        path = default_test_path()
        points = sample_true_trajectory(path)
        assert len(points) == math.ceil(path.length) + 1


class TestClassifyLink:
    def test_no_walls_always_los(self, square_site):
        for ap in square_site.aps:
            assert classify_link(square_site, (7.0, 3.0), ap) == LinkState.LOS

    def test_wall_crossing_link_is_nlos(self, square_site):
        site = SiteConfig(square_site.width, square_site.height, square_site.aps, walls=(((10.0, -1.0), (10.0, 21.0)),))
        assert classify_link(site, (5.0, 5.0), site.ap(2)) == LinkState.NLOS
        assert classify_link(site, (5.0, 5.0), site.ap(1)) == LinkState.LOS

    def test_device_at_ap_is_los(self):
        site = default_site()
        ap = site.ap(3)
        assert classify_link(site, ap.position, ap) == LinkState.LOS

    def test_inside_room_polygon_is_nlos(self):
        site = default_site()
        assert classify_link(site, (42.5, 40.0), site.ap(8)) == LinkState.NLOS

    def test_symmetric_in_endpoints(self, rng):
        site = default_site()
        for _ in range(200):
            device = (float(rng.uniform(0, site.width)), float(rng.uniform(0, site.height)))
            ap = site.aps[int(rng.integers(len(site.aps)))]
            swapped_site = SiteConfig(site.width, site.height, (AccessPoint(99, *device),), site.walls)
            forward = classify_link(site, device, ap)
            backward = classify_link(swapped_site, ap.position, swapped_site.ap(99))
            assert forward == backward


class TestSiteConfig:
    def test_default_site_dimensions(self):
        site = default_site()
        assert (site.width, site.height) == (85.0, 55.0)
        assert len(site.aps) == 10
        assert site.center == (42.5, 27.5)

    def test_ap_outside_site_rejected(self):
        with pytest.raises(ConfigurationError, match="outside"):
            SiteConfig(10.0, 10.0, (AccessPoint(1, 11.0, 5.0),))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ConfigurationError, match="Duplicate"):
            SiteConfig(10.0, 10.0, (AccessPoint(1, 1.0, 1.0), AccessPoint(1, 2.0, 2.0)))

    def test_from_dict_matches_json_layout(self):
        site = SiteConfig.from_dict({
            "width": 30, "height": 20,
            "aps": [{"id": 1, "x": 0, "y": 0}, {"id": 2, "x": 30, "y": 0}, {"id": 3, "x": 15, "y": 20}],
            "walls": [[[10, 0], [10, 10]]],
        })
        assert site.ap(3).position == (15.0, 20.0)
        assert site.walls == (((10.0, 0.0), (10.0, 10.0)),)
        assert SiteConfig.from_dict(site.to_dict()) == site

    def test_missing_field_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            SiteConfig.from_dict({"width": 10, "aps": []})
