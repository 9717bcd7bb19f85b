import sys

from edcnn.cli import main

sys.exit(main())
