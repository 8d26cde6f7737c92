# Configuration file for the Sphinx documentation builder.
#
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Path setup --------------------------------------------------------------

import os
import sys
sys.path.insert(0, os.path.abspath('../..'))

# -- Project information -----------------------------------------------------

project = 'ctxlate'
from datetime import datetime
year = datetime.now().year
copyright = f'{year}, The ctxlate Developers'
author = 'The ctxlate Developers'

import ctxlate
release = ctxlate.__version__

# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
    'sphinx.ext.viewcode',
    'sphinx.ext.mathjax',
    'numpydoc.numpydoc',
    'sphinx_gallery.gen_gallery'
]

sphinx_gallery_conf = {
    'examples_dirs': './examples',
    'gallery_dirs': 'auto_examples',
    # the gallery trains tiny networks, keep the build on CPU
    'filename_pattern': '/plot_',
}

# NumPy
numpydoc_class_members_toctree = False
numpydoc_show_class_members = True
numpydoc_show_inherited_class_members = False

# generate autosummary even if no references
autosummary_generate = True
autodoc_member_order = 'bysource'
autodoc_default_flags = ['members']

source_suffix = '.rst'
master_doc = 'index'
templates_path = ['_templates']
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

primary_domain = 'py'

# -- Options for HTML output -------------------------------------------------

html_theme = 'tensorly_sphinx_theme'

html_theme_options = {
    'nav_links': [('Install', 'install'),
                  ('User Guide', 'user_guide/index'),
                  ('API', 'modules/api'),
                  ('Examples', 'auto_examples/index')],
    'external_nav_links': [('TensorLy', 'http://tensorly.org/dev')]
}
