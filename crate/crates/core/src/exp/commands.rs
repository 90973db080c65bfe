// command implementations are filled in below
