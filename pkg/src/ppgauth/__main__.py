import sys

from ppgauth.cli import main

sys.exit(main())
