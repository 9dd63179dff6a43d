import sys

from matterlens.cli import main

sys.exit(main())
