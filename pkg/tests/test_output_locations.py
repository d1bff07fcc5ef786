#!/usr/bin/env python3
"""
Test module for output_locations.py.

Unit tests for the run directory layout and frame file discovery.
"""

import tempfile
import unittest
from pathlib import Path
from unittest.mock import MagicMock, patch

from codedwave.output_locations import (
    ArtifactKind,
    OutputPaths,
    ensure_output_paths,
    find_frames,
    frame_name,
    get_output_paths,
    get_run_info,
    group_frames,
    validate_paths,
)


class TestOutputLocations(unittest.TestCase):
    """Test cases for output_locations module."""

    def setUp(self):
        """Set up test environment."""
        self.test_root = Path("/test/run")
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.tmp_root = Path(self.tmp.name)

    def test_get_output_paths(self):
        """Every artifact kind gets a directory under the root."""
        paths = get_output_paths(self.test_root)
        self.assertIsInstance(paths, OutputPaths)
        self.assertEqual(paths.root, self.test_root)
        self.assertEqual(paths.frames_dir, self.test_root / "frames")
        self.assertEqual(paths.mf_dir, self.test_root / "mf")
        self.assertEqual(paths.metrics_dir, self.test_root / ArtifactKind.METRICS.value)
        self.assertEqual(len(paths), len(ArtifactKind) + 1)

    def test_validate_paths(self):
        """Path validation reports every directory."""
        paths = get_output_paths(self.test_root)
        with patch('pathlib.Path.exists') as mock_exists, \
             patch('pathlib.Path.is_dir') as mock_is_dir:
            mock_exists.return_value = True
            mock_is_dir.return_value = True
            validation = validate_paths(paths)
        self.assertEqual(set(validation), set(OutputPaths._fields))
        self.assertTrue(all(validation.values()))

    def test_validate_missing_paths(self):
        """A fresh root has no directories yet."""
        validation = validate_paths(get_output_paths(self.tmp_root / "missing"))
        self.assertFalse(any(validation.values()))

    def test_ensure_output_paths(self):
        """Creating the layout makes every directory exist."""
        paths = ensure_output_paths(get_output_paths(self.tmp_root / "run"))
        self.assertTrue(all(validate_paths(paths).values()))

    def test_ensure_output_paths_reports_directory(self):
        """A failing mkdir names the directory."""
        paths = get_output_paths(self.test_root)
        with patch('pathlib.Path.mkdir', side_effect=PermissionError(13, "Permission denied")):
            with self.assertRaises(PermissionError) as ctx:
                ensure_output_paths(paths)
        self.assertIn(str(self.test_root), str(ctx.exception))

    def test_frame_name(self):
        """Frame names carry a zero-padded index and the sequence label."""
        self.assertEqual(frame_name(0), "tx000_A.rf")
        self.assertEqual(frame_name(127, "B"), "tx127_B.rf")

    def test_find_frames_orders_by_index(self):
        """Frames come back by transmission index, then sequence."""
        for name in ["tx010_A.rf", "tx002_B.rf", "tx002_A.rf", "notes.txt", "tx001_A.csv"]:
            (self.tmp_root / name).write_bytes(b"")
        found = [p.name for p in find_frames(self.tmp_root)]
        self.assertEqual(found, ["tx002_A.rf", "tx002_B.rf", "tx010_A.rf"])
        only_b = [p.name for p in find_frames(self.tmp_root, "B")]
        self.assertEqual(only_b, ["tx002_B.rf"])

    def test_find_frames_missing_directory(self):
        """A missing directory holds no frames."""
        mock_dir = MagicMock()
        mock_dir.is_dir.return_value = False
        with patch('codedwave.output_locations.Path', return_value=mock_dir):
            self.assertEqual(find_frames("/nowhere"), [])
        mock_dir.iterdir.assert_not_called()

    def test_group_frames(self):
        """Frames group into transmissions keyed by sequence."""
        frames = [Path("tx000_A.rf"), Path("tx000_B.rf"), Path("tx001_A.rf"), Path("tx001_B.rf")]
        groups = group_frames(frames)
        self.assertEqual(len(groups), 2)
        self.assertEqual(set(groups[1]), {"A", "B"})
        self.assertEqual(groups[0]["B"], Path("tx000_B.rf"))

    def test_group_frames_rejects_foreign_names(self):
        """Only frame file names can be grouped."""
        with self.assertRaises(ValueError):
            group_frames([Path("image.rf")])

    def test_get_run_info(self):
        """Run information counts frames and notes the manifest."""
        paths = ensure_output_paths(get_output_paths(self.tmp_root / "run"))
        (paths.frames_dir / frame_name(0)).write_bytes(b"")
        (paths.frames_dir / frame_name(1)).write_bytes(b"")
        (paths.root / "manifest.txt").write_text("")
        info = get_run_info(paths.root)
        self.assertEqual(info["name"], "run")
        self.assertEqual(info["frames"], "2")
        self.assertEqual(info["noise_frames"], "0")
        self.assertEqual(info["manifest"], "True")

    def test_get_run_info_counts_noise_realizations(self):
        """Noise frames are counted across realization directories."""
        paths = ensure_output_paths(get_output_paths(self.tmp_root / "run"))
        for k in (1, 2):
            realization = paths.noise_dir / f"r{k:02d}"
            realization.mkdir()
            (realization / frame_name(0, "A")).write_bytes(b"")
            (realization / frame_name(0, "B")).write_bytes(b"")
        info = get_run_info(paths.root)
        self.assertEqual(info["noise_frames"], "4")
        self.assertEqual(info["frames"], "0")

    def test_get_run_info_missing(self):
        """A missing run directory is reported."""
        with patch.object(Path, 'exists', return_value=False):
            info = get_run_info(self.test_root)
        self.assertIn("error", info)


if __name__ == '__main__':
    unittest.main()
