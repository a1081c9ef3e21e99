void cnn(float out[256][224][224], float W[256][256][5][5], float in[256][228][228]) {
  for (int i = 0; i < 256; i++)
    for (int j = 0; j < 256; j++)
      for (int h = 0; h < 224; h++)
        for (int w = 0; w < 224; w++)
          for (int p = 0; p < 5; p++)
            for (int q = 0; q < 5; q++)
              out[i][h][w] += W[i][j][p][q] * in[j][h + p][w + q];
}
