# dartnet application package.
