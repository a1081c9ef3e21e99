void bicg(float A[24][20], float s[20], float q[24], float p[20], float r[24]) {
  for (int i = 0; i < 20; i++)
    s[i] = 0;
  for (int i = 0; i < 24; i++) {
    q[i] = 0;
    for (int j = 0; j < 20; j++) {
      s[j] += r[i] * A[i][j];
      q[i] += A[i][j] * p[j];
    }
  }
}
