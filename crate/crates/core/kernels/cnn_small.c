void cnn_small(float out[8][12][12], float W[8][8][3][3], float in[8][14][14]) {
  for (int i = 0; i < 8; i++)
    for (int j = 0; j < 8; j++)
      for (int h = 0; h < 12; h++)
        for (int w = 0; w < 12; w++)
          for (int p = 0; p < 3; p++)
            for (int q = 0; q < 3; q++)
              out[i][h][w] += W[i][j][p][q] * in[j][h + p][w + q];
}
