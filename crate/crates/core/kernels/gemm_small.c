void gemm_small(float alpha, float beta, float C[8][12], float A[8][10], float B[10][12]) {
  for (int i = 0; i < 8; i++) {
    for (int j = 0; j < 12; j++)
      C[i][j] *= beta;
    for (int k = 0; k < 10; k++)
      for (int j = 0; j < 12; j++)
        C[i][j] += alpha * A[i][k] * B[k][j];
  }
}
