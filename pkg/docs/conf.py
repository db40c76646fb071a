# Sphinx configuration for the supportnetworks API documentation.

import os
import sys
sys.path.insert(0, os.path.abspath('../src'))

extensions = ['sphinx.ext.autodoc',
    'sphinx.ext.mathjax']

source_suffix = '.rst'
master_doc = 'index'

project = 'Support Networks'
copyright = '2026, the supportnetworks authors'
author = 'the supportnetworks authors'
version = '0.1'
release = '0.1'

exclude_patterns = ['_build']
pygments_style = 'sphinx'

html_theme = 'alabaster'
