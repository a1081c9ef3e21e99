void two_mm(float alpha, float beta, float tmp[16][18], float A[16][22], float B[22][18], float C[18][24], float D[16][24]) {
  for (int i = 0; i < 16; i++)
    for (int j = 0; j < 18; j++) {
      tmp[i][j] = 0;
      for (int k = 0; k < 22; k++)
        tmp[i][j] += alpha * A[i][k] * B[k][j];
    }
  for (int i = 0; i < 16; i++)
    for (int j = 0; j < 24; j++) {
      D[i][j] *= beta;
      for (int k = 0; k < 18; k++)
        D[i][j] += tmp[i][k] * C[k][j];
    }
}
