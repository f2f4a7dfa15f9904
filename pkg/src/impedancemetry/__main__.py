from impedancemetry.cli import main

raise SystemExit(main())
