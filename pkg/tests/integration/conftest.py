import pytest

from tests.helpers import run_pipeline


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """A fixture directory the whole pipeline has run on once."""
    directory = tmp_path_factory.mktemp("pipeline")
    codes = run_pipeline(directory)
    assert all(code == 0 for code in codes.values()), codes
    return directory
